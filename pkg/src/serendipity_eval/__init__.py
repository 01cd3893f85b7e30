"""Serendipity evaluation toolkit.

Scores recommendation serendipity with proxy metrics, LLM raters and LLM
ensembles, and measures how well each scorer agrees with user-study
ratings (Pearson, MAE, RMSE).
"""

from .data_model import Dataset, DatasetSchema, EvaluationCase, load_dataset
from .ensemble import EnsembleSpec, ensemble_scores
from .llm_client import LLMClient, ModelSpec, ResponseCache, rate_all, rate_case
from .prompting import PromptSpec, build_prompt, parse_rating
from .proxy_metrics import (
    SogWeights,
    desr_score,
    normalize_to_likert,
    purs_score,
    snpr_score,
    sog_score,
)
from .seren_eva import MetaEvalReport, evaluate_method, mae, pearson, rmse, significance_test

__version__ = "0.1.0"
