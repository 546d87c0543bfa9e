"""
Embedding dump
==============

Post-look-ahead embeddings with a per-frame label code (bit i set when the
i-th speaker to appear is active). Train briefly so the clusters separate.
"""
import numpy as np

from fseend.datasim import MixtureSpec, generate_corpus
from fseend.evalkit import dump_embeddings, write_embeddings_csv
from fseend.model import FSEEND, ModelConfig
from fseend.training import TrainConfig, Trainer

spec = MixtureSpec(n_speakers=2, duration_frames=200, feature_dim=16)
corpus = generate_corpus(20, spec, seed=0)
model = FSEEND.init(ModelConfig(input_dim=16, d_model=16, n_heads=2, n_enc_blocks=2, n_dec_blocks=1, s_max=2), 0)
Trainer(model, corpus, TrainConfig(lr=3e-3)).run(until=60)

x, labels = corpus[0]
rows = dump_embeddings(model, x, labels)
write_embeddings_csv("embeddings.csv", rows, model.config.d_model)
print("wrote %d rows of %d columns to embeddings.csv" % (len(rows), len(rows[0])))

e = np.array([r[1:-1] for r in rows])
code = np.array([r[-1] for r in rows])
for a, b in [(1, 1), (2, 2), (1, 2)]:
    sim = e[code == a] @ e[code == b].T
    print("mean cosine, code %d vs code %d: %.3f" % (a, b, sim.mean()))
