from .attention import (
    ATTENTION_FUNCTIONS,
    AttentionModule,
    TemperatureSchedule,
    normalize_attention,
    temperature_at,
)
from .layer import AssemblyError, KWConvLayer, Warehouse, assemble_kernel, attention_logits, kw_forward
from .reference import reference_dynamic_conv, tile_kernel
