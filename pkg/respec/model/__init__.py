from respec.model.schemas import *
