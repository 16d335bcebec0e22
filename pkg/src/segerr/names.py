from enum import Enum, IntEnum


class GeneratorKind(Enum):
    TWO_PLANES = "two-planes"
    SPHERES_IN_BOX = "spheres-in-box"
    CHECKERBOARD = "checkerboard"
    RANDOM_BLOBS = "random-blobs"


class CorruptionMode(Enum):
    REGION_SWAP = "region-swap"
    DILATE = "dilate"
    ERODE = "erode"
    MERGE = "merge"
    SPECKLE = "speckle"


class DErrSampleMode(Enum):
    CLASS = "class"
    COMPONENT = "component"


class MetricType(Enum):
    MIOU = "mIoU"
    MACC = "mAcc"
    OACC = "oAcc"
    FERR = "FErr"
    MERR = "MErr"
    RERR = "RErr"
    DERR = "DErr"


class CounterType(Enum):
    PRED_BOUNDARY = "pred_boundary"
    GT_BOUNDARY = "gt_boundary"
    BOUNDARY_OVERLAP = "boundary_overlap"
    RERR_TP = "rerr_tp"
    RERR_ALL = "rerr_all"
    DERR_NUM = "derr_num"
    DERR_DEN = "derr_den"


class OutputType(Enum):
    SEMANTIC_SCORES = "semantic scores"
    BOUNDARY_SCORES = "boundary scores"


class LabelType(Enum):
    SEMANTIC = "semantic one-hot"
    BOUNDARY = "boundary pseudo-label"


class LossType(Enum):
    SEMANTIC = "Cross entropy + dice"
    BOUNDARY = "Binary cross entropy + dice"
    TOTAL = "Semantic + boundary"


class SceneFormat(Enum):
    ASCII = "ascii"
    BINARY = "binary"


class BenchMethod(Enum):
    GRID = "grid"
    BRUTE = "brute"
    KDTREE = "kdtree"


class ExitCode(IntEnum):
    OK = 0
    USAGE = 1
    IO = 2
    INTERNAL = 3
