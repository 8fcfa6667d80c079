"""Pairwise, position-swapped LLM-as-judge evaluation for medical summarization."""

from pairjudge.backend import BackendConfig, CompletionRequest, CompletionResult, cache_key, make_mock
from pairjudge.config import RunConfig, load_config
from pairjudge.dataset import Sample, SampleSet, TaskKind, Turn, load_dataset, subsample, validate_sample
from pairjudge.judge import (
    ComparisonRecord,
    FinalVerdict,
    Order,
    OrderVerdict,
    Outcome,
    Preferred,
    combine_swapped,
    judge_pair,
    parse_verdict,
    schedule_comparisons,
)
from pairjudge.orchestrator import run_evaluation, run_generation
from pairjudge.prompts import InstructionSet, JudgePromptTemplate, build_judge_prompt, build_summarization_prompt
from pairjudge.report import agreement_metrics, bootstrap_ci, position_flip_rate, render_table, win_rates

__version__ = "0.1.0"
