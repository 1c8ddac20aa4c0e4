"""Protocol conformance: recorded request/response pairs replay exactly.

The transcript file alternates request and response lines. Any byte-level
drift in serialization (field order, float formatting, error shapes) fails
this test, which is the point: the wire format is an external interface.
"""

from pathlib import Path

from remask_bridge.server import TabularServerModel

TRANSCRIPT = Path(__file__).parent / "data" / "golden_transcript.ndjson"


def test_transcript_replays_byte_for_byte(task_path):
    model = TabularServerModel(task_path)
    lines = TRANSCRIPT.read_text().splitlines()
    assert lines and len(lines) % 2 == 0
    from remask_bridge.server import handle_line

    for request, recorded in zip(lines[0::2], lines[1::2]):
        assert handle_line(request, model) == recorded
