"""scanfisher: generative scanpath models, Fisher kernels, and reader identification."""

__version__ = "0.1.0"

from .corpus import (
    FrequencyTable,
    NormStats,
    Text,
    TextFeatures,
    Word,
    compute_features,
    load_frequency_table,
    load_text,
    load_texts,
)
from .events import (
    EventBatch,
    SaccadeEvent,
    Scanpath,
    classify_saccade,
    extract_events,
    load_scanpaths,
    word_at,
)
from .fisher import (
    FisherMetric,
    digamma,
    fisher_metric,
    fisher_score,
    gram_matrix,
    kernel,
    score_matrix,
)
from .fit import FitConfig, fit_model, fit_pi
from .model import (
    ModelParams,
    batch_loglik,
    event_loglik,
    gamma_logpdf,
    link,
    sample_events,
    sample_scanpath,
)
from .svm import KernelProblem, MulticlassSvm, SvmModel, predict_text, solve_dual, train_multiclass
from .synth import SynthConfig, gen_corpus, gen_dataset, gen_readers
from .evaluate import (
    EvalReport,
    PipelineConfig,
    ReadingDataset,
    auc_score,
    binary_comprehension_eval,
    generative_classify,
    loto_cv,
    wilcoxon_signed_rank,
)
