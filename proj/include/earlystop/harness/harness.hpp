#pragma once

#include "earlystop/harness/evaluate.hpp"
#include "earlystop/harness/optimal.hpp"
#include "earlystop/harness/policy.hpp"
#include "earlystop/harness/synthetic.hpp"
#include "earlystop/harness/train.hpp"
