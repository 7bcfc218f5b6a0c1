from src.synthdata.dataset import (
    DEFAULT_ASSIGNMENT,
    DEFAULT_PROFILE,
    DEFAULT_SOURCE_LANGUAGES,
    Dataset,
    LanguageProfile,
    build_profiles,
    export_dataset,
    input_scales,
    long_tail_sizes,
    sample_dataset,
    sample_source_dataset,
)
from src.synthdata.metrics import eval_metrics, normalized, prediction_mse
from src.synthdata.teachers import NARROW_TEACHER_LAYERS, TeacherSpec, make_teachers, student_init, teacher_layer_names
