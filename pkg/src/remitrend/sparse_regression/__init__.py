"""Standardization, the LARS-LASSO path, penalty selection and OLS inference."""

from ._cv import (
    DegenerateFoldsError,
    InnerCV,
    LambdaSelection,
    fold_assignment,
    patient_kfold,
    select_lambda,
)
from ._lars import LarsPath, PathEvent, coefficients_at, lars_lasso_path, lars_path_gram
from ._model import FittedModel, LassoLarsRegressor, model_from_solution
from ._ols import CollinearityError, OlsInference, ols_inference
from ._special import betainc, student_t_two_sided
from ._standardize import StandardizationParams, standardize


def predict(model: FittedModel, row) -> float:
    """Score of one feature row given as a name -> value mapping."""
    return model.predict_row(row)


__all__ = [
    "CollinearityError",
    "DegenerateFoldsError",
    "FittedModel",
    "InnerCV",
    "LambdaSelection",
    "LarsPath",
    "LassoLarsRegressor",
    "OlsInference",
    "PathEvent",
    "StandardizationParams",
    "betainc",
    "coefficients_at",
    "fold_assignment",
    "lars_lasso_path",
    "lars_path_gram",
    "model_from_solution",
    "ols_inference",
    "patient_kfold",
    "predict",
    "select_lambda",
    "standardize",
    "student_t_two_sided",
]
