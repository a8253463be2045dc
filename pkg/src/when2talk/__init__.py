"""when2talk: a multi-turn dialogue model that decides when to talk.

A double-gated graph recurrent network over the conversation DAG drives both
the speak/silence decision and the reply generation; everything runs on a
small numpy-backed autodiff core.
"""

from .corpus import (DialogueSample, Transcript, Utterance, Vocab, build_vocab,
                     extract_samples, gen_synthetic, load_transcripts, tokenize)
from .evaluation import EvalReport, bleu_n, decision_metrics, distinct_n, evaluate, perplexity
from .graph import ConvGraph, build_graph, graph_stats, in_neighbors, validate_dag
from .model import Config, ModelParams, forward_batch, generate, init_params
from .tensor import Tape, Tensor, backward
from .training import (Checkpoint, TrainConfig, joint_loss, load_checkpoint,
                       save_checkpoint, train)

__version__ = "0.1.0"
