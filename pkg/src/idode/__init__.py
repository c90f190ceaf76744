"""Parameter identification for dynamical systems.

Learn the velocity field F(x, alpha) of a parameterized system from labeled
trajectories (or delay-embedded scalar series) with a feed-forward network,
then estimate the parameters of new trajectories by gradient descent through
the network's parameter inputs. A closed-form affine least-squares oracle
provides the verifiable baseline for systems linear/affine in the parameters.
"""

from idode.backend import get_backend_mode, native_available, set_backend_mode
from idode.dataset import (
    Normalization,
    ParamGrid,
    SupervisedSet,
    TrajectorySet,
    build_supervised,
    load_trajectories,
    save_trajectories,
    train_test_grids,
)
from idode.embed import (
    EmbeddedTrajectory,
    EmbeddingSpec,
    delay_embed,
    min_embedding_dim_cao,
    min_embedding_dim_fnn,
    select_delay_autocorr,
    spaced_delay_state,
)
from idode.evaluation import (
    EvalReport,
    ExperimentConfig,
    Representation,
    compare_representations,
    r_squared,
    run_experiment,
)
from idode.infer import (
    AffineModelAdapter,
    InferConfig,
    InferenceResult,
    best_training_init,
    infer,
    infer_batch,
)
from idode.integrate import BlowUpError, Trajectory, batch_integrate, integrate
from idode.net import MlpModel, Optimizer, init_model, load_model, save_model, step
from idode.oracle import (
    NormalEquations,
    affine_least_squares,
    dt_convergence_sweep,
    perturbed_velocity_sweep,
)
from idode.systems import (
    SystemSpec,
    double_pendulum,
    evaluate_affine,
    get_system,
    lorenz,
    lorenz96,
    lotka_volterra,
    system_names,
)
from idode.train import TrainConfig, TrainReport, train, train_loss

__version__ = "0.1.0"
