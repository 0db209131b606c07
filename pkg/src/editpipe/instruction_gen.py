"""Prompt construction, response parsing, and instruction validation.

Frame pairs are shown to a multimodal model which writes one editing
instruction describing how the first image becomes the second. Prompts
require absolute phrasing and a leading action verb; the model may answer
with the template's rejection token when the change is too complex to
state accurately. Responses are validated against the same rules before
anything reaches the dataset.
"""

from __future__ import annotations

import base64
import importlib.resources
import io
import json
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .flow_engine import Image
from .mllm_client import ProviderError  # re-exported for callers  # noqa: F401

IMAGE_SRC_SLOT = "{image_src}"
IMAGE_TGT_SLOT = "{image_tgt}"
CAPTION_SLOT = "{caption}"
REJECTION_SLOT = "{rejection_token}"

DEFAULT_ACTION_VERBS = (
    "Change", "Move", "Adjust", "Turn", "Make", "Rotate", "Shift",
    "Open", "Close", "Raise", "Lower", "Tilt", "Zoom", "Have",
)

RELATIVE_REFERENCE_PATTERNS = ("target image", "second image", "the other frame")

MAX_INSTRUCTION_CHARS = 480

VIOLATION_NO_ACTION_VERB = "no-action-verb"
VIOLATION_RELATIVE_REFERENCE = "relative-reference"
VIOLATION_TOO_LONG = "too-long"

CAPTION_PROMPT = "Describe this image in one to three sentences."


class ImageEncodeError(RuntimeError):
    """An image could not be encoded for transport."""


class EmptyResponse(ValueError):
    """The model returned no text at all."""


@dataclass
class PromptTemplate:
    """System text plus a user scaffold with two image slots."""

    system_text: str
    user_scaffold: str
    rejection_token: str
    version: str = "v1"

    def __post_init__(self):
        if not self.rejection_token:
            raise ValueError("rejection_token must be non-empty")
        for slot in (IMAGE_SRC_SLOT, IMAGE_TGT_SLOT):
            if self.user_scaffold.count(slot) != 1:
                raise ValueError(f"user_scaffold must contain exactly one {slot}")


@dataclass(frozen=True)
class Instruction:
    """A validated edit command; text starts with its action verb."""

    text: str
    verb: str
    source: str = ""


@dataclass
class GenOutcome:
    """Either an accepted Instruction or a rejection with its reason."""

    instruction: Instruction | None = None
    rejected_reason: str | None = None

    def __post_init__(self):
        if (self.instruction is None) == (self.rejected_reason is None):
            raise ValueError("exactly one of instruction / rejected_reason must be set")

    @property
    def accepted(self) -> bool:
        return self.instruction is not None


def load_template(path) -> PromptTemplate:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return PromptTemplate(
        system_text=data["system_text"],
        user_scaffold=data["user_scaffold"],
        rejection_token=data["rejection_token"],
        version=data.get("version", "v1"),
    )


def default_template() -> PromptTemplate:
    ref = importlib.resources.files("editpipe") / "templates" / "default_v1.json"
    with importlib.resources.as_file(ref) as path:
        return load_template(path)


def encode_image_data_url(img: Image) -> str:
    """PNG-encode an Image as a base64 data URL."""
    try:
        arr = np.clip(np.round(img.pixels * 255.0), 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        PILImage.fromarray(arr).save(buf, format="PNG")
    except Exception as exc:
        raise ImageEncodeError(str(exc)) from exc
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def build_prompt(src: Image, tgt: Image, src_caption: str | None,
                 template: PromptTemplate) -> list:
    """Chat messages for one frame pair: one text part, then the two images.

    The scaffold's image slots fix the attachment order; the caption slot
    is filled with the source caption or left blank.
    """
    system_text = template.system_text.replace(REJECTION_SLOT, template.rejection_token)
    text = template.user_scaffold
    src_first = text.index(IMAGE_SRC_SLOT) < text.index(IMAGE_TGT_SLOT)
    text = text.replace(IMAGE_SRC_SLOT, "").replace(IMAGE_TGT_SLOT, "")
    text = text.replace(CAPTION_SLOT, src_caption or "")
    text = "\n".join(line.rstrip() for line in text.splitlines()).strip()

    images = [encode_image_data_url(src), encode_image_data_url(tgt)]
    if not src_first:
        images.reverse()
    user_content = [{"type": "text", "text": text}]
    user_content += [{"type": "image_url", "image_url": {"url": url}} for url in images]
    return [
        {"role": "system", "content": system_text},
        {"role": "user", "content": user_content},
    ]


def build_caption_prompt(image: Image, prompt: str = CAPTION_PROMPT) -> list:
    return [{
        "role": "user",
        "content": [
            {"type": "text", "text": prompt},
            {"type": "image_url", "image_url": {"url": encode_image_data_url(image)}},
        ],
    }]


def validate(text: str, verbs=DEFAULT_ACTION_VERBS,
             patterns=RELATIVE_REFERENCE_PATTERNS,
             max_chars: int = MAX_INSTRUCTION_CHARS) -> str | None:
    """Check one instruction; returns None on pass, else the violation name.

    Rules, in order: the first token must be an allowlisted action verb;
    no relative-reference phrasing; length capped.
    """
    first = text.split(None, 1)[0] if text.split() else ""
    first = first.strip(".,!?:;")
    allowed = {v.lower() for v in verbs}
    if first.lower() not in allowed:
        return VIOLATION_NO_ACTION_VERB
    lowered = text.lower()
    if any(p in lowered for p in patterns):
        return VIOLATION_RELATIVE_REFERENCE
    if len(text) > max_chars:
        return VIOLATION_TOO_LONG
    return None


def parse_response(raw: str, template: PromptTemplate, source: str = "") -> GenOutcome:
    """Turn raw model text into an Instruction or a rejection.

    The rejection token anywhere in the response rejects the pair; text
    failing validation is rejected with the failing rule named.
    """
    if raw is None or not raw.strip():
        raise EmptyResponse("model returned empty text")
    if template.rejection_token in raw:
        return GenOutcome(rejected_reason="rejection-token")
    text = raw.strip()
    violation = validate(text)
    if violation is not None:
        return GenOutcome(rejected_reason=violation)
    verb = text.split(None, 1)[0].strip(".,!?:;")
    return GenOutcome(instruction=Instruction(text=text, verb=verb, source=source))


def caption(image: Image, provider, prompt: str = CAPTION_PROMPT) -> str:
    """One-to-three-sentence description of an image via the provider.

    Retries are the provider's responsibility; ProviderError propagates
    once its budget is exhausted.
    """
    return provider.chat(build_caption_prompt(image, prompt)).strip()
