from .forest import ForestModel, RegressionTree, forest_fit, forest_predict, forest_predict_grid

__all__ = ["ForestModel", "RegressionTree", "forest_fit", "forest_predict", "forest_predict_grid"]
