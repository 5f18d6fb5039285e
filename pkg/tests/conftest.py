import json
import struct
import sys
import zlib
from pathlib import Path

import pytest

FIXTURES_DIR = Path(__file__).parent / "fixtures"
STUB_EXECUTOR = [sys.executable, str(FIXTURES_DIR / "stub_executor.py")]


def make_png(red: int = 200, green: int = 80, blue: int = 40) -> bytes:
    """A tiny valid 1x1 PNG, deterministic and dependency-free."""

    def chunk(kind: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + kind
            + payload
            + struct.pack(">I", zlib.crc32(kind + payload))
        )

    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 2, 0, 0, 0)
    idat = zlib.compress(b"\x00" + bytes([red, green, blue]))
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", idat)
        + chunk(b"IEND", b"")
    )


GOOD_PLOT_CODE = """\
import base64
import os

PNG = "{png_b64}"
out = os.environ.get("CHART_OUTPUT_PATH", "chart.png")
with open(out, "wb") as fh:
    fh.write(base64.b64decode(PNG))
"""

BAD_PLOT_CODE = """\
values = [3, 1, 4]
labels = ["a", "b"]
if len(values) != len(labels):
    raise ValueError("bar count does not match label count")
"""

SLEEPY_PLOT_CODE = """\
import time
time.sleep(120)
"""

NO_OUTPUT_PLOT_CODE = """\
print("nothing saved")
"""


def good_code(png: bytes) -> str:
    import base64

    return GOOD_PLOT_CODE.format(png_b64=base64.b64encode(png).decode("ascii"))


def make_qa_reply(tag: str) -> str:
    """Canned teacher reply: 16 drafts, 3/3/3/2/2/1/1/1 across question types."""

    def draft(question: str, answer: str, qtype: str, reasoning: str) -> dict:
        return {
            "input": question,
            "chain_of_thought": f"<thinking>{reasoning}</thinking> <answer>{answer}</answer>",
            "final_answer": answer,
            "question_type": qtype,
        }

    drafts = []
    for i in range(3):
        drafts.append(
            draft(f"[{tag}] What is the sum of series {i}?", "42", "numerical", "40 + 2 = 42")
        )
    for i in range(3):
        drafts.append(
            draft(
                f"[{tag}] What is the value of the tallest bar minus bar {i}?",
                "17",
                "visual_numerical",
                "tallest is 20, bar is 3, 20 - 3 = 17",
            )
        )
    for i in range(3):
        drafts.append(
            draft(f"[{tag}] What is the label of slice {i}?", "Revenue", "data_retrieval", "read the legend")
        )
    drafts.append(draft(f"[{tag}] Is the trend increasing?", "Yes", "yes_no", "values rise left to right"))
    drafts.append(draft(f"[{tag}] Is the last bar the smallest?", "No", "yes_no", "the first bar is smaller"))
    drafts.append(draft(f"[{tag}] How many bars are there?", "4", "counting", "count the bars: 4"))
    drafts.append(draft(f"[{tag}] How many colors are used?", "2", "counting", "blue and orange"))
    drafts.append(
        draft(
            f"[{tag}] What was the author's favorite chart?",
            "Unanswerable",
            "unanswerable",
            "the image does not say",
        )
    )
    drafts.append(
        draft(
            f"[{tag}] Which is largest? (a) north (b) south (c) east",
            "b",
            "multiple_choice",
            "south has the tallest bar",
        )
    )
    drafts.append(
        draft(
            f"[{tag}] Q: top value? A: 20. And the bottom value?",
            "3",
            "conversational",
            "the smallest bar reads 3",
        )
    )
    assert len(drafts) == 16
    return json.dumps(drafts)


@pytest.fixture
def chart_workspace(tmp_path):
    """Three chart images (one wired to erroneous code) plus mock fixtures."""
    from chartrl.pipeline import content_hash

    charts_dir = tmp_path / "charts"
    charts_dir.mkdir()
    pngs = {
        "alpha": make_png(10, 20, 30),
        "bravo": make_png(40, 50, 60),
        "charlie": make_png(70, 80, 90),
    }
    paths = {}
    for name, png in pngs.items():
        path = charts_dir / f"{name}.png"
        path.write_bytes(png)
        paths[name] = path

    fixtures = {
        content_hash(paths["alpha"]): {
            "code": good_code(pngs["alpha"]),
            "qa_reply": make_qa_reply("alpha"),
            "language": "python_plotting",
        },
        content_hash(paths["bravo"]): {
            "code": BAD_PLOT_CODE,
            "qa_reply": make_qa_reply("bravo"),
            "language": "python_plotting",
        },
        content_hash(paths["charlie"]): {
            "code": good_code(pngs["charlie"]),
            "qa_reply": make_qa_reply("charlie"),
            "language": "python_plotting",
        },
    }
    fixtures_path = tmp_path / "fixtures.json"
    fixtures_path.write_text(json.dumps(fixtures), encoding="utf-8")
    return {
        "charts": [paths["alpha"], paths["bravo"], paths["charlie"]],
        "fixtures_path": fixtures_path,
        "charts_dir": charts_dir,
        "pngs": pngs,
    }
