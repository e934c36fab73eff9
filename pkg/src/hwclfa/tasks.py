"""The 25 handwriting tasks: prompt names and M/C/G categories."""
from dataclasses import dataclass

TASK_NAMES = {
    1: "signature",
    2: "horizontal line drawing",
    3: "vertical line drawing",
    4: "large circle drawing",
    5: "small circle drawing",
    6: "copied letter `L' `M' `P'",
    7: "copied letters",
    8: "cursive letter writing",
    9: "cursive bigram writing",
    10: "copied word `foglio'",
    11: "copied word `foglio' on line",
    12: "copied word `mamma'",
    13: "copied word `mamma' on line",
    14: "written memory words",
    15: "reversed word `bottiglia'",
    16: "reversed word `casa'",
    17: "copied multi-word phrases",
    18: "written object name",
    19: "postal form copy",
    20: "dictated sentence writing",
    21: "complex shape drawing",
    22: "copied phone number",
    23: "dictated phone number writing",
    24: "hand-drawn clock",
    25: "paragraph transcription",
}

# Best-effort reading of the task names; overridable through `categories=`.
DEFAULT_CATEGORIES = {
    **{t: "G" for t in (2, 3, 4, 5, 21, 24)},
    **{t: "C" for t in (6, 7, 8, 9, 10, 11, 12, 13, 15, 16, 17, 19, 22, 25)},
    **{t: "M" for t in (1, 14, 18, 20, 23)},
}

ALL_TASKS = tuple(range(1, 26))


@dataclass(frozen=True)
class TaskMeta:
    task_id: int
    name: str
    category: str


def task_meta(task_id, categories=None):
    if task_id not in TASK_NAMES:
        raise ValueError(f"task id must be in 1..25, got {task_id}")
    cats = DEFAULT_CATEGORIES if categories is None else categories
    return TaskMeta(task_id, TASK_NAMES[task_id], cats[task_id])


def all_tasks(categories=None):
    return [task_meta(t, categories) for t in ALL_TASKS]
