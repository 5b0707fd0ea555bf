"""Python bindings for the emrank empathy-ranking workbench.

Verdicts are strings: ``"slot1"``, ``"slot2"``, ``"abstain"`` in blinded
space and ``"chatbot"``, ``"physician"``, ``"undecided"`` after unblinding.
"""

from ._core import (
    BackendError,
    IoError,
    ParseError,
    RunFailed,
    blind,
    blinding_assignment,
    dataset_stats,
    evaluate_replay,
    extract,
    fleiss_kappa,
    load_dataset,
    load_run,
    majority,
    pearson,
    perplexity,
    render_few_shot,
    render_generation,
    render_one_shot,
    render_zero_shot,
    unblind,
    word_count,
)

__all__ = [
    "BackendError",
    "IoError",
    "ParseError",
    "RunFailed",
    "blind",
    "blinding_assignment",
    "dataset_stats",
    "evaluate_replay",
    "extract",
    "fleiss_kappa",
    "load_dataset",
    "load_run",
    "majority",
    "pearson",
    "perplexity",
    "render_few_shot",
    "render_generation",
    "render_one_shot",
    "render_zero_shot",
    "unblind",
    "win_rates",
    "word_count",
]


def win_rates(run):
    """Chatbot and physician shares of the decided items of a run dict."""
    s = run["summary"]
    decided = s["chatbot_wins"] + s["physician_wins"]
    if decided == 0:
        return None
    return s["chatbot_wins"] / decided, s["physician_wins"] / decided
