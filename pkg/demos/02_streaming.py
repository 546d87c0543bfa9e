"""
Frame-in, frame-out streaming
=============================

The stream emits frame t once frame t + right_pad has arrived and matches
the offline forward pass to float rounding.
"""
import numpy as np

from fseend.datasim import MixtureSpec, generate
from fseend.model import FSEEND, ModelConfig
from fseend.streaming import stack_posteriors

config = ModelConfig(input_dim=16, d_model=16, n_heads=2, n_enc_blocks=2, n_dec_blocks=1, s_max=2)
model = FSEEND.init(config, seed=1)
x, _ = generate(MixtureSpec(feature_dim=16, duration_frames=60, seed=3))
print("look-ahead latency: %d frames = %.1f s" % (config.right_pad, config.lookahead.latency_seconds))

state = model.open_stream(threshold=0.5)
frames = []
for t, x_t in enumerate(x):
    out = state.push(x_t)
    if out is None:
        if t < 3:
            print("pushed frame %2d, nothing yet" % t)
        continue
    frames.append(out)
    if t < 12:
        print("pushed frame %2d -> emitted frame %2d" % (t, out.index))
tail = state.flush()
print("flush emitted %d more frames" % len(tail))
frames += tail
print(frames[-1].to_json())

stream = stack_posteriors(frames, config.n_slots)
offline = model.infer(x)
print("max |stream - offline| = %.2e" % np.abs(stream - offline).max())
print("cache:", state.cache_sizes())

# the causal variant (no look-ahead) emits every frame immediately
causal = FSEEND.init(ModelConfig(input_dim=16, d_model=16, n_heads=2, kernel_size=10, left_pad=9, right_pad=0, s_max=2), 0)
s = causal.open_stream()
print("causal model, first push emits frame", s.push(x[0]).index)
