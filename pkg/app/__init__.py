"""
Monge-Ampère 型方程式ソルバー

det(D²u - A(x,Du)) = B(x,Du) の Dirichlet 問題を、劣解から出発する連続法と
ニュートン法で解き、正則性・構造条件・障壁などの仮定を数値的に判定する。
"""

__version__ = "1.0.0"
__description__ = "Monge-Ampère 型 Dirichlet 問題の差分ソルバーと仮定検証ツール"
