use crate::model::ModelParams;

pub(crate) fn theory_params(lambda: f64) -> ModelParams {
    ModelParams::example(lambda)
}
