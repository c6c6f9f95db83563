"""twoview: sentence encoders trained by making two views of the same
sentence agree.

One view is a bi-directional GRU, the other a linear map averaged over word
vectors. Training maximises a temperature-scaled softmax probability of
adjacent sentences under variant-specific cosine agreements, with the top
principal component of each batch of representations removed on the fly.
"""

from .autodiff import Tensor, parameter
from .encoders import (
    EncoderOutput,
    GruParams,
    LinearParams,
    bigru_forward,
    compose_test_representation,
    gru_cell_forward,
    linear_encode,
    pool,
)
from .errors import CollapseError, ConfigError, DataError, NumericalError
from .evalsuite import (
    AblationReport,
    ProbeModel,
    StsPair,
    adjacent_retrieval_recall,
    eval_probe,
    eval_sts,
    learning_curve_export,
    pearson,
    run_ablation,
    train_probe,
)
from .numcore import (
    AdamState,
    GradCheckReport,
    adam_step,
    clip_global_norm,
    cosine,
    finite_diff_check,
    l2_normalize_rows,
    matmul,
)
from .objective import (
    ObjectiveVariant,
    Temperature,
    agreement,
    agreement_matrix,
    contrastive_loss,
    positive_pair_mask,
)
from .pipeline import (
    Checkpoint,
    MetricsLog,
    ModelParams,
    TrainConfig,
    encode_corpus,
    load_checkpoint,
    load_config,
    parse_config,
    save_checkpoint,
    train,
)
from .postproc import PrincipalComponent, postprocess_batch, power_iteration_top, remove_component
from .textio import Corpus, EmbeddingTable, embed_sentence, load_corpus, load_word_vectors, make_batches, tokenize

__version__ = "0.1.0"
