"""JSON schema of scenario files."""

_num = {"type": "number"}
_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_angle = {"type": "number", "minimum": -90, "maximum": 90}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_rf_assignment = {
    "oneOf": [
        {"enum": ["search", "round_robin"]},
        {"type": "array", "items": {"type": "integer", "minimum": 0}},
    ]
}

_configs = {
    "type": "array",
    "items": {"enum": ["CF_A", "CF_B", "CF_C", "CPSL", "HBF"]},
    "uniqueItems": True,
    "minItems": 1,
}

SCENARIO_SCHEMA = _obj(
    {
        "mode": {"enum": ["hbf", "abf"]},
        "array": _obj(
            {
                "l_tx": _pos_int,
                "l_rx": _pos_int,
                "l_rf_tx": _pos_int,
                "l_rf_rx": _pos_int,
                "d_ant": {"type": "number", "exclusiveMinimum": 0},
                "tx_rx_gap": {"type": "number", "exclusiveMinimum": 0},
            },
            ["l_tx", "l_rx"],
        ),
        "waveform": _obj(
            {
                "f_center": {"type": "number", "exclusiveMinimum": 0},
                "n_subcarriers": _pos_int,
                "delta_f": {"type": "number", "exclusiveMinimum": 0},
                "n_symbols": _pos_int,
                "tx_power_dbm": _num,
                "noise_power_dbm": _num,
            },
            ["f_center", "n_subcarriers", "delta_f", "n_symbols", "tx_power_dbm", "noise_power_dbm"],
        ),
        "beams": _obj(
            {
                "theta_rad": _angle,
                "theta_comm": {"type": "array", "items": _angle},
                "rho": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "mu_db": {"type": "array", "items": {"type": ["number", "null"]}},
                "stream_powers": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "rf_assignment": _rf_assignment,
            },
            ["theta_rad", "theta_comm"],
        ),
        "nsp": _obj(
            {
                "n_freq": {"type": "integer", "minimum": 0},
                "null_subcarriers": {
                    "oneOf": [{"const": "uniform"}, {"type": "array", "items": {"type": "integer", "minimum": 0}}]
                },
                "null_angles_deg": {"type": "array", "items": _angle},
                "svd_rcond": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            }
        ),
        "si": _obj(
            {
                "isolation_db": {"type": "number", "exclusiveMinimum": 0},
                "file": {"type": "string"},
                "epsilon": {"type": "number", "minimum": 0},
                "seed": _int,
            }
        ),
        "mask": _obj(
            {
                "g_max_db": _num,
                "delta_deg": {"type": "number", "exclusiveMinimum": 0},
                "cpsl_db": {"type": "number", "exclusiveMaximum": 0},
                "grid_step_deg": {"type": "number", "exclusiveMinimum": 0},
            }
        ),
        "solver": _obj(
            {
                "restarts": _pos_int,
                "max_iters": _pos_int,
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "seed": _int,
                "penalty": {"enum": ["floor", "two_sided"]},
            }
        ),
        "configs": _configs,
        "hbf": _obj(
            {
                "l_rf_tx": _pos_int,
                "l_rf_rx": _pos_int,
                "mu_db": {"type": "array", "items": {"type": ["number", "null"]}},
                "rf_assignment": _rf_assignment,
            }
        ),
        "targets": {
            "type": "array",
            "items": _obj(
                {
                    "theta_deg": _angle,
                    "range_m": {"type": "number", "exclusiveMinimum": 0},
                    "rcs_m2": {"type": "number", "minimum": 0},
                },
                ["theta_deg", "range_m"],
            ),
        },
        "scan": _obj(
            {
                "start_deg": _angle,
                "stop_deg": _angle,
                "step_deg": {"type": "number", "exclusiveMinimum": 0},
                "window": {"enum": ["hamming", "rect"]},
                "fft_size": _pos_int,
                "max_range_m": {"type": "number", "exclusiveMinimum": 0},
                "seed": _int,
                "noise": {"type": "boolean"},
                "null_guard_deg": {"type": "number", "minimum": 0},
                "threshold_db": {"type": "number", "exclusiveMaximum": 0},
            }
        ),
        "output_dir": {"type": "string"},
    },
    ["mode", "array", "waveform", "beams"],
)
