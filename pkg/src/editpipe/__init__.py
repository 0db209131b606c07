"""editpipe: instruction-editing triplets mined from video frame pairs.

Submodules cover the pipeline stages and the supporting math:

- ``pair_sampler``: corpus scanning, caption keyword prefilter,
  fixed-interval frame pair sampling.
- ``flow_engine``: builtin coarse-to-fine flow estimation, .flo ingest,
  backward warping, occlusion masks and ratios.
- ``motion_filter``: keep/discard rules over flow statistics.
- ``instruction_gen`` / ``mllm_client``: prompts, validation, and the
  chat-completions client (plus a deterministic mock).
- ``dataset_store``: sharded JSONL persistence with hashed manifests.
- ``conditioning_kernel``: width/channel latent concatenation, forward
  diffusion, DDIM stepping, masked blending, latent file I/O.
- ``edit_metrics``: cosine-based editing metrics over embedding vectors.
- ``pipeline`` / ``cli``: configuration, journaling, staged runs, bench.
"""

from . import (  # noqa: F401
    conditioning_kernel,
    dataset_store,
    edit_metrics,
    flow_engine,
    instruction_gen,
    mllm_client,
    motion_filter,
    pair_sampler,
    pipeline,
    synth,
)

__version__ = "0.1.0"
