from .scenario import (KAUAI_POW_DEVICES, KAUAI_SCR_POST, KAUAI_SCR_PRE, KAUAI_SHARES, KAUAI_SHED, Scenario,
                       builtin_model_path, kauai_mini, load_scenario, scenario_from_dict)
from .study import (METRICS, MITIGATIONS, Comparison, StudyBundle, SweepParam, SweepSpec, SweepTable,
                    analyse, compare, export_for_analysis, mitigation_compare, mitigation_overrides,
                    run_event_study, sensitivity_sweep, simulate, write_json)
