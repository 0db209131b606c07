"""Fixture suite of model responses and their expected classification.

Labels: "valid", "rejection-token", "relative-reference", "no-action-verb",
"too-long". The rejection token for all cases is "REJECT".
"""

VALID = "valid"
TOKEN = "rejection-token"
RELATIVE = "relative-reference"
NO_VERB = "no-action-verb"
TOO_LONG = "too-long"

LONG_TAIL = " and keep every other part of the scene unchanged" * 12

RESPONSE_FIXTURES = [
    # valid instructions, one per allowlisted verb where natural
    ("Move the bee to the center of the flower", VALID),
    ("Change the man's jacket so it hangs open", VALID),
    ("Adjust the camera angle slightly upward", VALID),
    ("Turn the dancer to face the window", VALID),
    ("Make the dog sit on the left edge of the rug", VALID),
    ("Rotate the bicycle so the front wheel points at the door", VALID),
    ("Shift the lamp closer to the sofa", VALID),
    ("Open the laptop on the desk halfway", VALID),
    ("Close the cabinet behind the counter", VALID),
    ("Raise the child's arm so the kite string is taut", VALID),
    ("Lower the boom microphone out of the frame", VALID),
    ("Tilt the camera down toward the table", VALID),
    ("Zoom in on the musician's hands", VALID),
    ("Have the man look directly at the camera", VALID),
    ("Move the bee to the center of the flower.", VALID),
    ("  Adjust the sail so the boat leans right  ", VALID),
    # rejection token responses
    ("REJECT", TOKEN),
    ("REJECT: changes too complex", TOKEN),
    ("REJECT - the transformation spans too many regions", TOKEN),
    ("The differences are too subtle. REJECT", TOKEN),
    # relative references to the other frame
    ("Move the bee to the position in the target image", RELATIVE),
    ("Change the pose to match the second image", RELATIVE),
    ("Adjust the lighting like in the other frame", RELATIVE),
    ("Turn the cat as shown in the TARGET IMAGE", RELATIVE),
    # missing action verb
    ("The bee as in the target image", NO_VERB),
    ("the dog jumps", NO_VERB),
    ("A boat drifting toward the pier", NO_VERB),
    ("Please move the vase onto the shelf", NO_VERB),
    ("Slowly turn the camera to the right", NO_VERB),
    # over-length instruction
    ("Move the bee to the center of the flower" + LONG_TAIL, TOO_LONG),
]

assert len(RESPONSE_FIXTURES) == 30
