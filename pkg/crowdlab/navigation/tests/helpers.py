"""測試用的小工具"""

import math

from navigation.core import Pedestrian, Vec2


def make_ped(pid, x, y, vx=0.0, vy=0.0, goal=None, pref_speed=1.2, gaze=None):
    pos = Vec2(x, y)
    vel = Vec2(vx, vy)
    if goal is None:
        direction = vel.unit() if vel.norm() > 0 else Vec2(1.0, 0.0)
        goal = pos + direction * 20.0
    goal = Vec2.of(goal)
    heading = (goal - pos).angle()
    gaze_angle = heading if gaze is None else gaze
    return Pedestrian(
        id=pid, pos=pos, vel=vel, goal=goal, pref_speed=pref_speed,
        heading=heading, gaze_dir=Vec2(math.cos(gaze_angle), math.sin(gaze_angle)),
    )
