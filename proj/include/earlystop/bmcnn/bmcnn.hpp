#pragma once

#include "earlystop/bmcnn/evaluate.hpp"
#include "earlystop/bmcnn/model.hpp"
#include "earlystop/bmcnn/train.hpp"
