from .spec import (
    ArchSpec,
    ArchSpecError,
    GroupSpec,
    LayerSpec,
    arch_from_dict,
    load_arch_spec,
    parse_arch_spec,
    parse_budget,
)
from .plan import (
    BetaTable,
    GroupPlan,
    ParamReport,
    PartitionMap,
    PlanningError,
    WarehousePlan,
    assign_beta,
    attention_hidden,
    beta_table,
    count_params,
    derive_cell_dims,
    partition_kernel,
    plan_report,
    plan_warehouses,
)
