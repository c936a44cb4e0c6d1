PART_COLOURS = {
    "torso": "#81bef7",
    "head": "#f5c4f2",
    "left_arm": "#f78181",
    "right_arm": "#81f781",
    "left_leg": "#f7be81",
    "right_leg": "#bc7ff5",
    "UNKNOWN": "#dadada",
}

METHOD_COLOURS = {
    "vqhps": "#3d79d6",
    "most_frequent_token": "#df5d5d",
    "oracle": "#5fc65f",
}

DEFAULT_METHOD_COLOUR = "#a25ba0"

ERROR_COLOUR_MAP = "viridis"
