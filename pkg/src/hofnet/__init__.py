"""hofnet: higher-order trajectory networks for steady flow fields.

Particles traced through a vector field become sequences of spatial blocks;
those sequences become networks whose nodes aggregate flow histories.  The
package builds first-order, fixed-order, variable-order, and
transition-optimized clustered networks, evaluates them on particle-density
propagation, and partitions them into flow communities.
"""

from .backend import active_backend
from .fields import (BlockGrid, ConstantField, DomainError, FieldFormatError,
                     GridField, SinusoidalMixingField, SwirlField,
                     block_grid_for)
from .tracing import (Streamline, Termination, TERMINAL_ID, default_step,
                      default_zero_tol, generate_split_seeds, rk4_step,
                      stratified_seeds, to_block_sequence,
                      trace_block_sequences, trace_polylines, trace_streamline)
from .corpus import (SequenceCorpus, SequenceFormatError, corpus_hash,
                     density_series, read_sequences, write_sequences)
from .states import StateSpace, extract_states, lift_exact, lift_longest_suffix
from .networks import (BundleFormatError, Network, build_clustered, build_fon,
                       build_fixed_order, build_variable_order, load_network,
                       save_network)
from .propagation import estimate_blocks, estimate_series, kld_loss, kld_per_step
from .training import (OptimizationDivergence, OptimizeResult, TrainConfig,
                       optimize_network, train_clustered)
from .density import DensityReport, density_error
from .community import (detect_communities, map_equation, mean_community_visits,
                        stationary_flow, sweep_markov_time)
from .config import ConfigError, RunConfig, parse_config

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
