"""
Real-time factor
================

RTF = processing time / audio duration. Every frame attends to all past
frames, so per-frame cost and cache size grow with t.
"""
from fseend.cli import cmd_bench
from fseend.model import FSEEND, ModelConfig

toy = FSEEND.init(ModelConfig(input_dim=16, d_model=16, n_heads=2, n_enc_blocks=2, n_dec_blocks=1, s_max=2), 0)
report = cmd_bench(model=toy, duration=60.0)
print(report.table())
print("cache bytes at sampled frames:", report.cache_bytes)

# default (full-size) layer sizes, one minute of audio
full = FSEEND.init(ModelConfig(), 0)
print("\nfull size, %d parameters" % full.n_parameters())
print(cmd_bench(model=full, duration=60.0).table())
