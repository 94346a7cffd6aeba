from .models import ModelSpec, accuracy, gradient, init_params, loss, per_sample_gradients
from .data import Dataset, WorkerPartition, partition_by_label, synth_heterogeneous_quadratic
from .simulation import (
    ExperimentResult,
    RoundMetrics,
    Simulation,
    TrainState,
    lr_schedule,
    quadratic_trajectories,
    run_experiment,
    run_round,
)
