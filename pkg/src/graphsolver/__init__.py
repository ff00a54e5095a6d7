"""Surface-current prediction for conducting scatterers.

A method-of-moments solver (RWG basis functions, combined field integral
equation) generates labeled surface-current data on parametric targets; an
edge-conditioned graph network learns the map from incident-field features
to those currents.  An analytic Mie series for the conducting sphere acts
as the solver's accuracy oracle.
"""

from .mesh import (TriangleMesh, ShapeSpec, MeshReport, MeshError,
                   validate_mesh, import_obj, export_obj, generate_primitive)
from .rwg import RwgSet, build_rwg, eval_basis, surface_divergence, \
    centroid_currents
from .em import (PlaneWave, ImpedanceSystem, RcsCut, EmError, Z0, C0,
                 plane_wave_fields, assemble_system, excitation_vector,
                 solve_system, bistatic_rcs, rcs_to_csv, rcs_from_csv,
                 solution_to_bytes, solution_from_bytes)
from .mie import mie_sphere_rcs, mie_backscatter, mie_truncation
from .graph import (GraphSample, GraphError, incident_current, build_graph,
                    attach_labels, labels_to_currents, sample_to_bytes,
                    sample_from_bytes)
from .nn import (ModelConfig, NnError, init_params, kernel_fcn, graph_conv,
                 forward, predict, mse_loss, backward, loss_and_grads,
                 save_params, load_params)
from .train import (TrainConfig, AdamState, TrainReport, EvalMetrics,
                    TrainError, lr_schedule, adam_step, init_adam,
                    batch_graphs, train, evaluate)
from .data import (SweepSpec, DatasetManifest, DataError, enumerate_sweep,
                   generate_dataset, split_dataset, load_samples)

__version__ = "0.1.0"
