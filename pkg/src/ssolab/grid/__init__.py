from .model import GridModel, ModelError, load_model, model_from_dict
from .network import assemble, power_flow, scr, thevenin, NoSourceError
from .sim import Event, SimResult, SimulationDiverged, Simulator, run

__all__ = ["GridModel", "ModelError", "load_model", "model_from_dict", "assemble", "power_flow",
           "scr", "thevenin", "NoSourceError", "Event", "SimResult", "SimulationDiverged",
           "Simulator", "run"]
