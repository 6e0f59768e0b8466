"""Pilot models: steering DCNN, throttle LSTM, traffic-light CNN, plus the
expert demonstrator, preprocessing, and training."""

from .preprocess import (  # noqa: F401
    PreprocessMode, preprocess_frame, area_resize, rgb_to_hsv, fit_to_model)
from .models import (  # noqa: F401
    SteeringModelConfig, TrafficModelConfig, ThrottleModelConfig,
    build_steering_model, build_traffic_model, ThrottleNet, SENSOR_DIM)
from .train import TrainConfig, TrainReport, train  # noqa: F401
from .drive import (  # noqa: F401
    SteeringOutput, ThrottleWindow, predict_steering, predict_throttle,
    smooth_throttle, classify_light, sensor_vector, normalized_to_pwm,
    pwm_to_normalized, PWM_MIN, PWM_MAX)
from .expert import ExpertConfig, expert_driver  # noqa: F401


def build_throttle_model(cfg: ThrottleModelConfig = ThrottleModelConfig(),
                         seed: int = 0) -> ThrottleNet:
    return ThrottleNet(cfg, seed=seed)
