from .models import (BertConfig, BertMini, DlrmConfig, DlrmMini, LeNetConfig, LeNetMini, ModelGraph,
                     Prediction, PredictionBatch, ToyConfig, ToyLinear, make_model, model_from_tensors)

__all__ = ["BertConfig", "BertMini", "DlrmConfig", "DlrmMini", "LeNetConfig", "LeNetMini", "ModelGraph",
           "Prediction", "PredictionBatch", "ToyConfig", "ToyLinear", "make_model", "model_from_tensors"]
