"""
morsescope 数値コア

- 区間演算（interval）
- ベクトル場の式・記号微分（vfield）
- 精度保証付き積分（integrator）
- 立方体グリッド（grid）
- 組合せ的包含写像（enclosure）
"""


class MorsescopeError(Exception):
    """morsescope 全体の基底例外"""
