"""Star-convex nested instance segmentation: fields, proposals, losses and metrics."""

__version__ = "0.1.0"

from .grid import invert, masked_product_sum, to_semantic
from .geometry import (StarPolygon, boundary_distance_field, is_star_convex, polygon_from_fields,
                       radial_field, rasterize)
from .nms import Proposal, nms, predict_instances, propose, render_instances
from .losses import (BranchFields, FieldTargets, LossConfig, bce_term, combined_loss, distance_term,
                     soft_semantic, stardist_loss, toy_fit, wbr_exclusive, wbr_overlap, wbr_penalty)
from .metrics import (ImagePair, MatchTable, MetricReport, ap_indifference_delta, average_precision,
                      containment, instance_iou, iou_recall, jtpr_one_to_many, jtpr_one_to_one, match,
                      metric_table)
from .synth import NestedScene, SceneSpec, degrade, gen_scene
