#pragma once

#include "earlystop/dsp/audio.hpp"
#include "earlystop/dsp/features.hpp"
#include "earlystop/dsp/mfcc.hpp"
#include "earlystop/dsp/pca.hpp"
#include "earlystop/dsp/wavelet.hpp"
