"""Desk-scale multimodal pipeline mechanics.

Aspect-preserving resize planning under pixel budgets, 2D rotary
position embeddings and block-diagonal packed attention, probabilistic
visual tokens with an embedding table, first-fit-decreasing sequence
packing with waste reporting, thinking-mode chat templating, and DPO /
GRPO training objectives, all with oracle-backed verification.
"""

__version__ = "0.1.0"

from .chat import (
    ChatMessage,
    ImagePart,
    MalformedThinkBlock,
    RenderedPrompt,
    Role,
    TextPart,
    ThinkingOutput,
    UnresolvedImageRef,
    parse_thinking,
    render,
)
from .encoder import (
    AttentionParams,
    DisabledRope,
    LearnedPosTable,
    PatchSequence,
    RopeConfig,
    apply_rope_2d,
    block_diag_forward,
    interpolate_pos_table,
    rope_dot_relative,
)
from .errors import LengthMismatch, NonFiniteInput, ShapeMismatch
from .geometry import (
    BudgetInfeasible,
    ImageSize,
    Phase,
    PixelBudget,
    ResizePlan,
    phase_budget,
    plan_resize,
    token_count,
)
from .objectives import (
    AnswerKind,
    DpoConfig,
    DpoResult,
    GroupTooSmall,
    PreferenceGroup,
    PreferencePair,
    ScoredCandidate,
    UnknownAnswerLetter,
    UnparseableNumeric,
    build_pairs,
    dpo_loss,
    grpo_advantages,
    mcq_to_fill_in_blank,
    verify_answer,
)
from .packing import (
    ManifestError,
    ManifestRecord,
    NaiveBaseline,
    PackedSequence,
    PackingReport,
    SampleRecord,
    SampleTooLong,
    build_attention_metadata,
    naive_batch_waste,
    pack_ffd,
    packing_report,
    parse_manifest_line,
    sample_from_record,
)
