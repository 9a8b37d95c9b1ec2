#pragma once

#include "earlystop/dqn/agent.hpp"
#include "earlystop/dqn/qnetwork.hpp"
#include "earlystop/dqn/replay.hpp"
