"""Neural-graph nowcasting of network parameters during training."""

from ._nino import (
    ArchSpec,
    ConfigError,
    GraphTemplate,
    LinefitNowcaster,
    Nowcaster,
    ParamTensor,
    SpecError,
    TrainableNowcaster,
    build_template,
    edge_features,
    fit_scaler,
    graph_embedding,
    graph_inverse,
    k_decay,
    linefit_predict,
    linefitplus_predict,
    load_nowcaster,
    make_cnn,
    make_gpt,
    make_mlp,
    make_msa_only,
    make_nowcaster,
    msa_forward,
    nowcast_schedule,
    symmetry_experiment,
    task_arch,
    task_preset_json,
    task_preset_names,
    validate_run_config,
    wl_signature,
)

__all__ = [name for name in dir() if not name.startswith("_")]
