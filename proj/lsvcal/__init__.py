from ._lsvcal import (
    InvalidInput,
    IvOutOfBounds,
    bs_greeks,
    bs_price,
    calibrate,
    eval_ivs,
    gen_market,
    implied_vol,
    local_vol_sq,
    sample_xi,
)

__all__ = [
    "InvalidInput",
    "IvOutOfBounds",
    "bs_greeks",
    "bs_price",
    "calibrate",
    "eval_ivs",
    "gen_market",
    "implied_vol",
    "local_vol_sq",
    "sample_xi",
]
