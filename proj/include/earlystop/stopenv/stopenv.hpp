#pragma once

#include "earlystop/stopenv/env.hpp"
#include "earlystop/stopenv/reward.hpp"
#include "earlystop/stopenv/state.hpp"
