"""File-based command line interface.

Data goes to stdout, diagnostics to stderr; exit status is 0 exactly
when no diagnostic was emitted. All subcommands are deterministic given
their inputs and --seed, so repeated runs are byte-identical. Set
NAVIT_PACK_LOG=debug|info|warning|error to adjust log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Iterable

from . import __version__
from .chat import (
    ChatMessage,
    ImagePart,
    MalformedThinkBlock,
    Role,
    TextPart,
    UnresolvedImageRef,
    parse_thinking,
    render,
)
from .geometry import BudgetInfeasible, ImageSize, Phase, ResizePlan, phase_budget, plan_resize
from .objectives import (
    DpoConfig,
    build_pairs,
    dpo_loss,
    grpo_advantages,
    parse_group_line,
)
from .packing import (
    ManifestError,
    SampleTooLong,
    build_attention_metadata,
    pack_ffd,
    packing_report,
    parse_manifest_line,
    sample_from_record,
)
from .selfcheck import CHECK_NAMES, run_checks

log = logging.getLogger("navit_pack")

_CONVERSATION_KEYS = {"messages", "images"}
_MESSAGE_KEYS = {"role", "parts"}


@dataclass(frozen=True)
class CliConfig:
    """Run knobs collected from the parsed arguments."""

    phase: Phase = Phase.P2
    capacity: int = 8192
    batch_size: int = 8
    seed: int = 0
    strict_parse: bool = True

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "CliConfig":
        defaults = cls()
        return cls(
            phase=getattr(args, "phase", defaults.phase),
            capacity=getattr(args, "capacity", defaults.capacity),
            batch_size=getattr(args, "batch_size", defaults.batch_size),
            seed=getattr(args, "seed", defaults.seed),
            strict_parse=getattr(args, "strict", defaults.strict_parse),
        )


def _diag(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, separators=(",", ":"), sort_keys=False))


def _plan_json(plan: ResizePlan) -> dict:
    return {
        "source": {"width": plan.source.width, "height": plan.source.height},
        "target": {"width": plan.target.width, "height": plan.target.height},
        "grid_rows": plan.grid_rows,
        "grid_cols": plan.grid_cols,
        "token_count": plan.token_count,
    }


def _read_manifest_lines(path: str) -> Iterable[tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if line.strip():
                yield lineno, line


def cmd_plan(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    budget = phase_budget(config.phase)
    failures = 0
    for lineno, line in _read_manifest_lines(args.manifest):
        try:
            record = parse_manifest_line(line)
        except ManifestError as e:
            _diag(f"{args.manifest}:{lineno}: {e}")
            failures += 1
            continue
        for index, size in enumerate(record.images):
            try:
                plan = plan_resize(size, budget)
            except BudgetInfeasible as e:
                _diag(f"{args.manifest}:{lineno}: image {index}: {e}")
                failures += 1
                continue
            _emit({"id": record.id, "image_index": index, **_plan_json(plan)})
    return 1 if failures else 0


def cmd_pack(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    budget = phase_budget(config.phase)
    samples = []
    seen_ids: set[str] = set()
    failures = 0
    for lineno, line in _read_manifest_lines(args.manifest):
        try:
            record = parse_manifest_line(line)
            if record.id in seen_ids:
                raise ManifestError(f"duplicate sample id {record.id!r}")
            seen_ids.add(record.id)
            samples.append(sample_from_record(record, budget))
        except (ManifestError, BudgetInfeasible, ValueError) as e:
            _diag(f"{args.manifest}:{lineno}: {e}")
            failures += 1
    if failures:
        return 1
    try:
        sequences = pack_ffd(samples, config.capacity)
        report = packing_report(samples, config.capacity, config.batch_size)
    except SampleTooLong as e:
        _diag(f"samples exceed capacity {e.capacity}: {', '.join(e.ids)}")
        return 1
    log.info(
        "packed %d samples into %d sequences (pad fraction %.4f)",
        report.n_samples,
        report.n_sequences,
        report.packed_pad_fraction,
    )
    for seq in sequences:
        _, positions = build_attention_metadata(seq)
        _emit({**seq.to_json_dict(), "position_ids": positions})
    _emit(report.to_json_dict())
    return 0


def _parse_conversation(obj: dict) -> tuple[list[ChatMessage], dict[str, ImageSize]]:
    if not isinstance(obj, dict):
        raise ValueError(f"conversation must be a JSON object, got {type(obj).__name__}")
    unknown = set(obj) - _CONVERSATION_KEYS
    if unknown:
        raise ValueError(f"unknown field {sorted(unknown)[0]!r}")
    sizes: dict[str, ImageSize] = {}
    for i, img in enumerate(obj.get("images", [])):
        if not isinstance(img, dict) or set(img) != {"id", "width", "height"}:
            raise ValueError(f"image {i} must have exactly id/width/height")
        if img["id"] in sizes:
            raise ValueError(f"duplicate image id {img['id']!r}")
        sizes[img["id"]] = ImageSize(width=img["width"], height=img["height"])
    messages = []
    for i, msg in enumerate(obj.get("messages", [])):
        if not isinstance(msg, dict):
            raise ValueError(f"message {i} must be an object")
        unknown = set(msg) - _MESSAGE_KEYS
        if unknown:
            raise ValueError(f"message {i}: unknown field {sorted(unknown)[0]!r}")
        try:
            role = Role(msg.get("role"))
        except ValueError:
            raise ValueError(f"message {i}: invalid role {msg.get('role')!r}") from None
        parts = []
        for j, part in enumerate(msg.get("parts", [])):
            if not isinstance(part, dict) or len(part) != 1:
                raise ValueError(f"message {i} part {j}: need exactly one of text/image")
            if "text" in part and isinstance(part["text"], str):
                parts.append(TextPart(part["text"]))
            elif "image" in part and isinstance(part["image"], str):
                parts.append(ImagePart(part["image"]))
            else:
                raise ValueError(f"message {i} part {j}: need exactly one of text/image")
        messages.append(ChatMessage(role=role, parts=tuple(parts)))
    if not messages:
        raise ValueError("conversation has no messages")
    return messages, sizes


def cmd_chat(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    try:
        with open(args.conversation, "r", encoding="utf-8") as f:
            obj = json.load(f)
        messages, sizes = _parse_conversation(obj)
        budget = phase_budget(config.phase)
        plans = {image_id: plan_resize(size, budget) for image_id, size in sizes.items()}
        prompt = render(messages, args.thinking, plans)
    except (ValueError, UnresolvedImageRef, BudgetInfeasible, json.JSONDecodeError) as e:
        _diag(f"{args.conversation}: {e}")
        return 1
    sys.stdout.write(prompt.flat_text())
    if args.sidecar:
        sidecar = {
            "thinking_enabled": prompt.thinking_enabled,
            "image_token_total": prompt.image_token_total(),
            "placeholders": prompt.placeholder_offsets(),
        }
        with open(args.sidecar, "w", encoding="utf-8") as f:
            json.dump(sidecar, f, separators=(",", ":"))
            f.write("\n")
    return 0


def cmd_parse(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    raw = sys.stdin.read()
    try:
        result = parse_thinking(raw, lenient=not config.strict_parse)
    except MalformedThinkBlock as e:
        _diag(f"malformed think block: {e}")
        return 1
    _emit(result.to_json_dict())
    return 0


def _run_and_report(seed: int, fault: str | None, only: tuple[str, ...] | None) -> int:
    results = run_checks(seed, fault=fault, only=only)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status}  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        _diag(f"failed checks: {', '.join(failed)}")
        return 1
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    return _run_and_report(config.seed, args.fault_inject, None)


def cmd_grad_check(args: argparse.Namespace) -> int:
    config = CliConfig.from_args(args)
    return _run_and_report(config.seed, args.fault_inject, ("vet-grad", "dpo-grad"))


def _read_groups(path: str):
    failures = 0
    groups = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                groups.append(parse_group_line(line))
            except ValueError as e:
                _diag(f"{path}:{lineno}: {e}")
                failures += 1
    return groups, failures


def cmd_prefs(args: argparse.Namespace) -> int:
    groups, failures = _read_groups(args.groups)
    if failures:
        return 1
    if args.min_score_variance > 0.0:
        kept = [g for g in groups if g.passes_difficulty_filter(args.min_score_variance)]
        log.info("difficulty filter kept %d of %d groups", len(kept), len(groups))
        groups = kept
    if args.prefs_command == "pairs":
        for group in groups:
            for pair in build_pairs(group, args.margin):
                _emit(
                    {
                        "query_id": group.query_id,
                        "chosen_index": pair.chosen_index,
                        "rejected_index": pair.rejected_index,
                        "chosen_response": pair.chosen.response,
                        "rejected_response": pair.rejected.response,
                        "score_gap": pair.score_gap,
                    }
                )
    elif args.prefs_command == "dpo":
        cfg = DpoConfig(beta=args.beta, nll_weight=args.nll_weight)
        for group in groups:
            for pair in build_pairs(group, args.margin):
                result = dpo_loss(pair.chosen, pair.rejected, cfg)
                _emit(
                    {
                        "query_id": group.query_id,
                        "chosen_index": pair.chosen_index,
                        "rejected_index": pair.rejected_index,
                        "loss": result.loss,
                        "d_logprob_policy_chosen": result.d_logprob_policy_chosen,
                        "d_logprob_policy_rejected": result.d_logprob_policy_rejected,
                        "d_logprob_reference_chosen": result.d_logprob_reference_chosen,
                        "d_logprob_reference_rejected": result.d_logprob_reference_rejected,
                    }
                )
    else:
        for group in groups:
            advantages = grpo_advantages([c.score for c in group.candidates])
            _emit({"query_id": group.query_id, "advantages": advantages})
    return 0


def _phase(value: str) -> Phase:
    try:
        return Phase(value.lower())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"invalid phase {value!r}; choose from p1, p2, p3"
        ) from None


def _positive_int(value: str) -> int:
    parsed = int(value)
    if parsed < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return parsed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="navit-pack",
        description="Geometry planning, sequence packing, chat templating, "
        "preference objectives, and self-verification over JSONL files.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="resize plans for each manifest image")
    plan.add_argument("--manifest", required=True, help="sample manifest (JSONL)")
    plan.add_argument("--phase", type=_phase, default=Phase.P2)
    plan.set_defaults(func=cmd_plan)

    pack = sub.add_parser("pack", help="pack a manifest into fixed-capacity sequences")
    pack.add_argument("--manifest", required=True, help="sample manifest (JSONL)")
    pack.add_argument("--phase", type=_phase, default=Phase.P2)
    pack.add_argument("--capacity", type=_positive_int, default=8192)
    pack.add_argument("--batch-size", type=_positive_int, default=8)
    pack.set_defaults(func=cmd_pack)

    chat = sub.add_parser("chat", help="render a conversation to its prompt text")
    chat.add_argument("--conversation", required=True, help="conversation JSON file")
    chat.add_argument("--phase", type=_phase, default=Phase.P2)
    chat.add_argument(
        "--thinking", action=argparse.BooleanOptionalAction, default=False,
        help="open the assistant turn inviting a think block",
    )
    chat.add_argument("--sidecar", help="write placeholder offsets JSON here")
    chat.set_defaults(func=cmd_chat)

    parse = sub.add_parser("parse", help="split think-tagged output from stdin")
    strictness = parse.add_mutually_exclusive_group()
    strictness.add_argument(
        "--strict", dest="strict", action="store_true", default=True,
        help="fail on malformed think blocks (default)",
    )
    strictness.add_argument(
        "--lenient", dest="strict", action="store_false",
        help="recover from unterminated think blocks",
    )
    parse.set_defaults(func=cmd_parse)

    verify = sub.add_parser("verify", help="run all built-in correctness checks")
    verify.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    verify.add_argument(
        "--fault-inject", choices=CHECK_NAMES, default=None,
        help="(test only) make exactly this check fail",
    )
    verify.set_defaults(func=cmd_verify)

    grad = sub.add_parser("grad-check", help="run only the gradient checks")
    grad.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    grad.add_argument(
        "--fault-inject", choices=("vet-grad", "dpo-grad"), default=None,
        help="(test only) make exactly this check fail",
    )
    grad.set_defaults(func=cmd_grad_check)

    prefs = sub.add_parser("prefs", help="preference-objective utilities over group JSONL")
    prefs_sub = prefs.add_subparsers(dest="prefs_command", required=True)
    for name, help_text in (
        ("pairs", "emit preference pairs per group"),
        ("dpo", "emit DPO loss and gradients per pair"),
        ("grpo", "emit group-relative advantages per group"),
    ):
        p = prefs_sub.add_parser(name, help=help_text)
        p.add_argument("--groups", required=True, help="scored groups (JSONL)")
        p.add_argument(
            "--min-score-variance", type=float, default=0.0,
            help="drop groups whose score variance is below this (difficulty filter)",
        )
        if name in ("pairs", "dpo"):
            p.add_argument("--margin", type=float, default=0.0)
        if name == "dpo":
            p.add_argument("--beta", type=float, default=0.1)
            p.add_argument("--nll-weight", type=float, default=0.0)
        p.set_defaults(func=cmd_prefs)

    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("NAVIT_PACK_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        _diag(f"cannot open {e.filename}: {e.strerror}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
