from core.errors import (CoViewError, ConfigError, EmptyDatasetError, GenerationError, IntegrityError,
                         ParameterError, ShapeError, ViewLookupError)
from core.types import (CameraKind, ExamplePair, FirstPersonWindow, FlowField, Frame, Mask, PersonInstance,
                        Problem, Sequence, SoftMask)
from core.validation import DEFAULT_THRESHOLD, Violation, threshold_mask, validate_sequence
