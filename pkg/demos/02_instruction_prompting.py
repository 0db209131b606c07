"""Walkthrough: prompting a multimodal model for editing instructions.

Shows the prompt payload built for a frame pair, then parses a few model
responses: a good instruction, the rejection sentinel, and rule-violating
text. The deterministic mock provider stands in for a real endpoint; point
``MllmClient`` at any OpenAI-compatible server to go live.
"""

import json

import numpy as np

from editpipe import instruction_gen as ig
from editpipe.flow_engine import Image
from editpipe.mllm_client import MockMllm
from editpipe.synth import textured_image

rng = np.random.default_rng(3)
src = Image(textured_image(96, 96, rng))
tgt = Image(textured_image(96, 96, rng))

template = ig.default_template()
print(f"Template version: {template.version}, rejection token: {template.rejection_token}")

messages = ig.build_prompt(src, tgt, "a bee on a flower", template)
parts = messages[1]["content"]
print(f"Payload: {len(messages)} messages; user content has "
      f"{sum(p['type'] == 'text' for p in parts)} text part and "
      f"{sum(p['type'] == 'image_url' for p in parts)} image parts")
preview = dict(parts[1])
preview["image_url"] = {"url": preview["image_url"]["url"][:48] + "..."}
print(json.dumps(preview, indent=2))

print("\nParsing model responses:")
for raw in (
    "Move the bee to the center of the flower",
    "REJECT: the change spans too many regions",
    "Move the bee to the position in the target image",
    "the bee flies away",
):
    outcome = ig.parse_response(raw, template, source="demo@" + template.version)
    if outcome.accepted:
        print(f"  ACCEPT  {raw!r}  (verb: {outcome.instruction.verb})")
    else:
        print(f"  REJECT  {raw!r}  (reason: {outcome.rejected_reason})")

print("\nThe mock provider answers deterministically from the request hash:")
mock = MockMllm(reject_every=6)
caption = ig.caption(src, mock)
print(f"  caption request  -> {caption!r}")
raw = mock.chat(messages)
print(f"  instruction      -> {raw!r}")
print(f"  repeat call      -> {mock.chat(messages)!r}  (identical)")
