from .agent import (TrainConfig, XLightResult, agent_state, evaluate, load_checkpoint, reward_of,
                    run_xlight, save_checkpoint, transfer_eval, write_curve)
from .qnet import (Adam, QNetwork, ReplayBuffer, TrainingError, Transition, act, bellman_target,
                   forward, train_step)
