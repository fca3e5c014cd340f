"""Freeze/reinitialize plans for finetuning a trained network's last layers."""

from __future__ import annotations

from collections.abc import Callable, Iterable

from ..mednext import final_decoder_patterns, init_params
from ..params import ParamTree, select


def finetune_plan(
    model: ParamTree,
    variant: str = "a",
    selector: Iterable[str] | Callable[[str], bool] | None = None,
    seed: int = 1,
) -> ParamTree:
    """Freeze everything outside ``selector``.

    Variant ``"a"`` keeps the checkpoint values of the selected parameters,
    variant ``"b"`` re-draws them with the initializer (seeded by ``seed``).
    ``selector`` is a list of glob patterns over parameter names or a
    predicate; the default picks the last decoder stage and every
    deep-supervision head.
    """
    if variant not in ("a", "b"):
        raise ValueError(f"variant must be 'a' (keep) or 'b' (reinit), got {variant!r}")
    if selector is None:
        selector = final_decoder_patterns()
    if callable(selector):
        chosen = [n for n in model if selector(n)]
    else:
        chosen = select(model, selector)
    if not chosen:
        raise ValueError("finetune selector matched no parameters")
    keep = set(chosen)
    plan = model.with_frozen(lambda n: n not in keep)
    if variant == "b":
        fresh = init_params([(n, model[n].shape) for n in chosen], seed)
        plan = plan.replace_values(fresh)
    return plan
