#!/usr/bin/env python3
"""Regenerates data/prestoe.json and data/kick_reduced.json.

Link masses, inertias and capsule sizes are approximate: they are chosen to
sum to 29.5 kg with a 1.3 m standing height, not measured from hardware.
"""
import json
import os

HIP = dict(tau=48.0, vel=20.0)
KNEE = dict(tau=200.0, vel=10.0)
ANKLE = dict(tau=100.0, vel=10.0)
TOE = dict(tau=10.0, vel=20.0)
ARM = dict(tau=18.0, vel=40.0)
TORSO = dict(tau=18.0, vel=40.0)

X, Y, Z = [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]


def box_inertia(m, sx, sy, sz):
    return [m * (sy * sy + sz * sz) / 12, 0.0, 0.0, m * (sx * sx + sz * sz) / 12, 0.0, m * (sx * sx + sy * sy) / 12]


def rod_z(m, length, r=0.04):
    return box_inertia(m, 2 * r, 2 * r, length)


class Builder:
    def __init__(self, name):
        self.doc = dict(name=name, links=[], joints=[], contact_points=[], keypoints=[], collision_pairs=[])

    def base(self, name, mass, com, inertia, capsule=None):
        self.doc["links"].append(self._link(name, mass, com, inertia, capsule))
        self.doc["joints"].append(dict(name="root", kind="floating-base"))
        return 0

    def _link(self, name, mass, com, inertia, capsule):
        link = dict(name=name, mass=mass, com=com, inertia=inertia)
        if capsule:
            link["capsule"] = dict(a=capsule[0], b=capsule[1], radius=capsule[2])
        return link

    def joint(self, name, parent, origin, axis, qlim, lim, link, mass, com, inertia, capsule=None):
        self.doc["links"].append(self._link(link, mass, com, inertia, capsule))
        self.doc["joints"].append(dict(
            name=name, kind="revolute", parent=parent, origin=origin, axis=axis,
            q_min=qlim[0], q_max=qlim[1], v_min=-lim["vel"], v_max=lim["vel"],
            tau_min=-lim["tau"], tau_max=lim["tau"]))
        return len(self.doc["links"]) - 1

    def contact(self, name, link, offset, foot):
        self.doc["contact_points"].append(dict(name=name, link=link, offset=offset, foot=foot))

    def keypoint(self, name, link, offset=(0.0, 0.0, 0.0)):
        self.doc["keypoints"].append(dict(name=name, link=link, offset=list(offset)))

    def pair(self, a, b):
        self.doc["collision_pairs"].append([a, b])

    def finish(self):
        self.doc["total_mass"] = round(sum(l["mass"] for l in self.doc["links"]), 12)
        return self.doc


def seven_dof_leg(b, side, hip_y, masses):
    s = side[0]
    foot = "left" if side == "left" else "right"
    yaw = b.joint(f"{s}_hip_yaw", 0, [0.0, hip_y, -0.05], Z, (-0.6, 0.6), HIP,
                  f"{s}_hip_yaw_link", masses[0], [0.0, 0.0, 0.0], box_inertia(masses[0], 0.06, 0.06, 0.06))
    roll = b.joint(f"{s}_hip_roll", yaw, [0.0, 0.0, 0.0], X, (-0.5, 0.5), HIP,
                   f"{s}_hip_roll_link", masses[1], [0.0, 0.0, 0.0], box_inertia(masses[1], 0.08, 0.08, 0.08))
    thigh = b.joint(f"{s}_hip_pitch", roll, [0.0, 0.0, 0.0], Y, (-2.2, 1.0), HIP,
                    f"{s}_thigh", masses[2], [0.0, 0.0, -0.15], rod_z(masses[2], 0.30, 0.05),
                    ([0.0, 0.0, 0.0], [0.0, 0.0, -0.30], 0.045))
    shank = b.joint(f"{s}_knee", thigh, [0.0, 0.0, -0.30], Y, (-0.05, 2.4), KNEE,
                    f"{s}_shank", masses[3], [0.0, 0.0, -0.15], rod_z(masses[3], 0.30, 0.04),
                    ([0.0, 0.0, -0.02], [0.0, 0.0, -0.28], 0.04))
    ap = b.joint(f"{s}_ankle_pitch", shank, [0.0, 0.0, -0.30], Y, (-0.9, 0.9), ANKLE,
                 f"{s}_ankle_pitch_link", masses[4], [0.0, 0.0, 0.0], box_inertia(masses[4], 0.03, 0.03, 0.03))
    foot_link = b.joint(f"{s}_ankle_roll", ap, [0.0, 0.0, 0.0], X, (-0.4, 0.4), ANKLE,
                        f"{s}_foot", masses[5], [0.02, 0.0, -0.04], box_inertia(masses[5], 0.16, 0.09, 0.04),
                        ([-0.06, 0.0, -0.04], [0.10, 0.0, -0.04], 0.03))
    toe = b.joint(f"{s}_toe", foot_link, [0.10, 0.0, -0.06], Y, (-0.8, 0.8), TOE,
                  f"{s}_toe_link", masses[6], [0.025, 0.0, 0.01], box_inertia(masses[6], 0.05, 0.09, 0.02))
    b.contact(f"{s}_heel", foot_link, [-0.06, 0.0, -0.06], foot)
    b.contact(f"{s}_back_inner", foot_link, [-0.03, 0.04, -0.06], foot)
    b.contact(f"{s}_back_outer", foot_link, [-0.03, -0.04, -0.06], foot)
    b.contact(f"{s}_front_inner", toe, [0.05, 0.04, 0.0], foot)
    b.contact(f"{s}_front_outer", toe, [0.05, -0.04, 0.0], foot)
    b.keypoint(f"{s}_hip", thigh)
    b.keypoint(f"{s}_knee", shank)
    b.keypoint(f"{s}_ankle", foot_link)
    b.keypoint(f"{s}_toe", toe, (0.05, 0.0, 0.0))
    return dict(thigh=thigh, shank=shank, foot=foot_link, toe=toe)


def prestoe():
    b = Builder("prestoe")
    b.base("pelvis", 6.0, [0.0, 0.0, 0.0], box_inertia(6.0, 0.15, 0.25, 0.12), ([0.0, -0.1, 0.0], [0.0, 0.1, 0.0], 0.07))
    b.keypoint("pelvis", 0)
    leg_m = [0.3, 0.5, 2.0, 1.3, 0.1, 0.5, 0.15]
    r = seven_dof_leg(b, "right", -0.10, leg_m)
    l = seven_dof_leg(b, "left", 0.10, leg_m)
    torso = b.joint("torso_yaw", 0, [0.0, 0.0, 0.10], Z, (-0.8, 0.8), TORSO,
                    "torso", 9.0, [0.0, 0.0, 0.22], box_inertia(9.0, 0.18, 0.30, 0.45),
                    ([0.0, 0.0, 0.05], [0.0, 0.0, 0.40], 0.10))
    b.keypoint("neck", torso, (0.0, 0.0, 0.40))
    arm_m = [0.3, 0.3, 0.9, 0.6, 0.3]
    arms = {}
    for side, sy in (("right", -1.0), ("left", 1.0)):
        s = side[0]
        sp = b.joint(f"{s}_shoulder_pitch", torso, [0.0, 0.17 * sy, 0.35], Y, (-3.0, 3.0), ARM,
                     f"{s}_shoulder_pitch_link", arm_m[0], [0.0, 0.0, 0.0], box_inertia(arm_m[0], 0.05, 0.05, 0.05))
        sr = b.joint(f"{s}_shoulder_roll", sp, [0.0, 0.0, 0.0], X, (-1.5, 1.5), ARM,
                     f"{s}_shoulder_roll_link", arm_m[1], [0.0, 0.0, 0.0], box_inertia(arm_m[1], 0.05, 0.05, 0.05))
        upper = b.joint(f"{s}_shoulder_yaw", sr, [0.0, 0.0, 0.0], Z, (-1.5, 1.5), ARM,
                        f"{s}_upper_arm", arm_m[2], [0.0, 0.0, -0.11], rod_z(arm_m[2], 0.22, 0.035),
                        ([0.0, 0.0, -0.02], [0.0, 0.0, -0.20], 0.035))
        fore = b.joint(f"{s}_elbow", upper, [0.0, 0.0, -0.22], Y, (-2.3, 0.0), ARM,
                       f"{s}_forearm", arm_m[3], [0.0, 0.0, -0.10], rod_z(arm_m[3], 0.20, 0.03),
                       ([0.0, 0.0, -0.02], [0.0, 0.0, -0.18], 0.03))
        hand = b.joint(f"{s}_wrist", fore, [0.0, 0.0, -0.20], Z, (-1.5, 1.5), ARM,
                       f"{s}_hand", arm_m[4], [0.0, 0.0, -0.04], box_inertia(arm_m[4], 0.04, 0.06, 0.08))
        b.keypoint(f"{s}_shoulder", upper)
        b.keypoint(f"{s}_elbow", fore)
        b.keypoint(f"{s}_wrist", hand)
        arms[side] = dict(upper=upper, fore=fore)
    b.pair(r["thigh"], l["thigh"])
    b.pair(r["shank"], l["shank"])
    b.pair(r["foot"], l["foot"])
    for side, leg in (("right", r), ("left", l)):
        b.pair(arms[side]["fore"], leg["thigh"])
        b.pair(arms[side]["fore"], 0)
    return b.finish()


def kick_reduced():
    """Right leg kicks (7 DoF); the left support leg has hip/knee/ankle pitch
    only and is angled inward so the support foot sits under the body."""
    b = Builder("kick_reduced")
    b.base("pelvis", 20.5, [0.0, 0.01, 0.22], [0.85, 0.0, 0.0, 0.75, 0.0, 0.28],
           ([0.0, -0.1, 0.0], [0.0, 0.1, 0.0], 0.07))
    b.keypoint("pelvis", 0)
    r = seven_dof_leg(b, "right", -0.10, [0.3, 0.4, 2.0, 1.2, 0.1, 0.4, 0.1])
    thigh = b.joint("l_hip_pitch", 0, [0.0, 0.10, -0.05], Y, (-2.2, 1.0), HIP,
                    "l_thigh", 2.3, [0.0, -0.025, -0.15], rod_z(2.3, 0.30, 0.05),
                    ([0.0, 0.0, 0.0], [0.0, -0.05, -0.30], 0.045))
    shank = b.joint("l_knee", thigh, [0.0, -0.05, -0.30], Y, (-0.05, 2.4), KNEE,
                    "l_shank", 1.5, [0.0, -0.02, -0.15], rod_z(1.5, 0.30, 0.04),
                    ([0.0, -0.003, -0.02], [0.0, -0.037, -0.28], 0.04))
    foot = b.joint("l_ankle_pitch", shank, [0.0, -0.04, -0.30], Y, (-0.9, 0.9), ANKLE,
                   "l_foot", 0.7, [0.04, 0.0, -0.04], box_inertia(0.7, 0.21, 0.09, 0.04),
                   ([-0.06, 0.0, -0.04], [0.14, 0.0, -0.04], 0.03))
    b.contact("l_heel", foot, [-0.06, 0.0, -0.06], "left")
    b.contact("l_back_inner", foot, [-0.03, -0.045, -0.06], "left")
    b.contact("l_back_outer", foot, [-0.03, 0.045, -0.06], "left")
    b.contact("l_front_inner", foot, [0.15, -0.045, -0.06], "left")
    b.contact("l_front_outer", foot, [0.15, 0.045, -0.06], "left")
    b.keypoint("l_hip", thigh)
    b.keypoint("l_knee", shank)
    b.keypoint("l_ankle", foot)
    b.keypoint("l_toe", foot, (0.15, 0.0, -0.06))
    b.pair(r["thigh"], thigh)
    b.pair(r["shank"], shank)
    b.pair(r["foot"], shank)
    b.pair(r["shank"], foot)
    b.pair(r["foot"], foot)
    return b.finish()


def main():
    out = os.path.join(os.path.dirname(__file__), "..", "data")
    for name, doc in (("prestoe.json", prestoe()), ("kick_reduced.json", kick_reduced())):
        with open(os.path.join(out, name), "w") as f:
            json.dump(doc, f, indent=1)
            f.write("\n")
        print(name, len(doc["joints"]) - 1, "joints,", len(doc["contact_points"]), "contacts,",
              doc["total_mass"], "kg")


if __name__ == "__main__":
    main()
