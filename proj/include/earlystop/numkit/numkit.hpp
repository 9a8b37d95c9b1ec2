#pragma once

#include "earlystop/numkit/adam.hpp"
#include "earlystop/numkit/attention.hpp"
#include "earlystop/numkit/checkpoint.hpp"
#include "earlystop/numkit/layers.hpp"
#include "earlystop/numkit/loss.hpp"
#include "earlystop/numkit/tensor.hpp"
