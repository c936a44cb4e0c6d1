from enum import Enum, unique


@unique
class JointLayout(Enum):
    SMPL24 = 1
    H36M17 = 2
    DESK16 = 3
    CUSTOM = 4

    @staticmethod
    def from_string(label: str) -> "JointLayout":
        for value in JointLayout:
            if str(value.name).lower() == label.lower():
                return value
        raise ValueError(f"Unknown joint layout: {label}")


JOINT_COUNTS = {
    JointLayout.SMPL24: 24,
    JointLayout.H36M17: 17,
    JointLayout.DESK16: 16,
}

# Desk template bones: name, parent, joint (bone start), bone end, radius. Metres, y up,
# +x is the body's left, +z faces forward.
DESK_BONES = [
    ("pelvis", -1, (0.0, 0.0, 0.0), (0.0, 0.12, 0.0), 0.13),
    ("spine", 0, (0.0, 0.12, 0.0), (0.0, 0.30, 0.0), 0.12),
    ("chest", 1, (0.0, 0.30, 0.0), (0.0, 0.52, 0.0), 0.14),
    ("head", 2, (0.0, 0.52, 0.0), (0.0, 0.78, 0.0), 0.09),
    ("left_upper_arm", 2, (0.18, 0.48, 0.0), (0.45, 0.48, 0.0), 0.05),
    ("left_forearm", 4, (0.45, 0.48, 0.0), (0.70, 0.48, 0.0), 0.04),
    ("left_hand", 5, (0.70, 0.48, 0.0), (0.80, 0.48, 0.0), 0.035),
    ("right_upper_arm", 2, (-0.18, 0.48, 0.0), (-0.45, 0.48, 0.0), 0.05),
    ("right_forearm", 7, (-0.45, 0.48, 0.0), (-0.70, 0.48, 0.0), 0.04),
    ("right_hand", 8, (-0.70, 0.48, 0.0), (-0.80, 0.48, 0.0), 0.035),
    ("left_thigh", 0, (0.10, -0.02, 0.0), (0.10, -0.45, 0.0), 0.07),
    ("left_shin", 10, (0.10, -0.45, 0.0), (0.10, -0.85, 0.0), 0.05),
    ("left_foot", 11, (0.10, -0.85, 0.0), (0.10, -0.88, 0.14), 0.035),
    ("right_thigh", 0, (-0.10, -0.02, 0.0), (-0.10, -0.45, 0.0), 0.07),
    ("right_shin", 13, (-0.10, -0.45, 0.0), (-0.10, -0.85, 0.0), 0.05),
    ("right_foot", 14, (-0.10, -0.85, 0.0), (-0.10, -0.88, 0.14), 0.035),
]

DESK_BONE_NAMES = [bone[0] for bone in DESK_BONES]

# Coarse body parts used to label vertex groups.
DESK_BONE_TO_PART = {
    "pelvis": "torso",
    "spine": "torso",
    "chest": "torso",
    "head": "head",
    "left_upper_arm": "left_arm",
    "left_forearm": "left_arm",
    "left_hand": "left_arm",
    "right_upper_arm": "right_arm",
    "right_forearm": "right_arm",
    "right_hand": "right_arm",
    "left_thigh": "left_leg",
    "left_shin": "left_leg",
    "left_foot": "left_leg",
    "right_thigh": "right_leg",
    "right_shin": "right_leg",
    "right_foot": "right_leg",
}

# Per-joint euler limits (degrees, xyz order, parent-aligned frame).
DESK_ANGLE_LIMITS = {
    "pelvis": ((0, 0), (0, 0), (0, 0)),
    "spine": ((-20, 30), (-20, 20), (-15, 15)),
    "chest": ((-15, 20), (-20, 20), (-10, 10)),
    "head": ((-30, 30), (-45, 45), (-20, 20)),
    "left_upper_arm": ((-60, 60), (-45, 45), (-80, 40)),
    "left_forearm": ((0, 0), (-110, 0), (0, 0)),
    "left_hand": ((-30, 30), (-30, 30), (-40, 40)),
    "right_upper_arm": ((-60, 60), (-45, 45), (-40, 80)),
    "right_forearm": ((0, 0), (0, 110), (0, 0)),
    "right_hand": ((-30, 30), (-30, 30), (-40, 40)),
    "left_thigh": ((-90, 30), (-30, 30), (-10, 40)),
    "left_shin": ((0, 130), (0, 0), (0, 0)),
    "left_foot": ((-20, 30), (0, 0), (0, 0)),
    "right_thigh": ((-90, 30), (-30, 30), (-40, 10)),
    "right_shin": ((0, 130), (0, 0), (0, 0)),
    "right_foot": ((-20, 30), (0, 0), (0, 0)),
}

# SMPL T-pose in the Human3.6M 17-joint layout, pelvis at the origin (metres).
H36M_JOINT_NAMES = [
    "pelvis", "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "spine", "thorax", "nose", "head",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
]

H36M_T_POSE = [
    (0.0, 0.0, 0.0),
    (-0.12, -0.02, 0.0),
    (-0.12, -0.42, 0.0),
    (-0.12, -0.82, 0.0),
    (0.12, -0.02, 0.0),
    (0.12, -0.42, 0.0),
    (0.12, -0.82, 0.0),
    (0.0, 0.22, 0.0),
    (0.0, 0.45, 0.0),
    (0.0, 0.58, 0.05),
    (0.0, 0.70, 0.0),
    (0.17, 0.45, 0.0),
    (0.44, 0.45, 0.0),
    (0.70, 0.45, 0.0),
    (-0.17, 0.45, 0.0),
    (-0.44, 0.45, 0.0),
    (-0.70, 0.45, 0.0),
]
