"""scenefit: differentiable 2D vector scenes built from spectral shape prototypes.

Scenes are lists of interpretable object parameters (color, pose, blended
shape, confidence) rendered by a soft rasterizer that is exactly
differentiable in every parameter.  The package covers the full loop: shape
math, rendering, losses with optimal object matching, benchmark generation,
gradient-based scene fitting, prototype discovery by clustering, evaluation
metrics, and gradient diagnostics, plus a CLI (`scenefit --help`).
"""

from .efd import (DegenerateContour, EfdShape, PrototypeBank,
                  WeightSimplexViolation, blend_shapes, contour_from_efd,
                  efd_from_contour, normalize_shape, symmetry_order)
from .scene import (FlatLayout, FlatParams, LayoutMismatch, ObjectParams, Scene,
                    angle_of, flatten, unflatten)
from .renderer import (Mesh, RenderConfig, TriangulationFailure, build_mesh,
                       render, render_grad, render_labels)
from .losses import (DimensionMismatch, MatchResult, NotEnoughCandidates,
                     grad_param_loss, hungarian, image_loss, matching_cost,
                     param_loss)
from .generator import (DatasetExample, GenConfig, builtin_bank,
                        generate_dataset, sample_params_from_dataset,
                        sample_scene)
from .optimize import (AdamState, FitReport, PlateauScheduler, adam_step,
                       fit_from_init, fit_opt_iter, fit_rand_optp)
from .prototypes import (ClusterResult, choose_k, discover_prototypes,
                         k_medoids, shape_distance)
from .metrics import MetricReport, ari, evaluate, iou, ssim
from .analysis import (AlignmentRow, RecoveryRow, gradient_alignment,
                       interpolate_params, recovery_study)
from .estimators import (IterativeSceneFitter, KMedoids, PrototypeDiscovery,
                         RandomInitSceneFitter, SceneRefiner)

__version__ = "0.1.0"
