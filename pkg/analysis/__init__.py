"""
morsescope 解析層

- Morse 分解と Morse グラフ（morse）
- 流れへの持ち上げの検証（verify）
- 指数対と Conley 指数（conley, homology）
- 総当たりの参照実装（oracles）
"""
