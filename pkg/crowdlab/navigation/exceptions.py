"""導航函式庫的例外類別"""


class CrowdNavError(Exception):
    """所有導航與實驗錯誤的基底類別"""


class ConfigurationError(CrowdNavError, ValueError):
    """設定值不合法或缺少必要欄位"""


class TimeBaseMismatch(CrowdNavError, ValueError):
    """兩條軌跡的 t0 / dt / 長度不一致"""


class IndexOutOfRange(CrowdNavError, IndexError):
    pass


class EmptyTrajectory(CrowdNavError, ValueError):
    pass


class CFLViolation(CrowdNavError, ValueError):
    """時間步長超過 CFL 條件允許的上限"""

    def __init__(self, dt, max_dt):
        self.dt = dt
        self.max_dt = max_dt
        super().__init__(f"dt={dt:.6g} s 違反 CFL 條件，最大可用 dt={max_dt:.6g} s")


class OutOfDomain(CrowdNavError, ValueError):
    """查詢點或時間落在流場範圍之外"""


class InfeasibleScenario(CrowdNavError):
    """場景密度過高，無法在幾何內放置所有行人"""


class DegenerateTriangulation(CrowdNavError):
    pass


class GoalBlocked(CrowdNavError):
    """起點或終點不在任何自由空間三角形內"""


class DisconnectedGraph(CrowdNavError):
    """三角圖上起點與終點之間沒有路徑"""


class NonFiniteObjective(CrowdNavError, ArithmeticError):
    pass


class NotNormalizable(CrowdNavError, ValueError):
    """權重總和為零或非有限值"""


class TruncatedLog(CrowdNavError):
    """回合紀錄不完整，無法計算指標"""
