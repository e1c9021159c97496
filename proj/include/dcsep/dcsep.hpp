#pragma once

#include "dcsep/adam.hpp"
#include "dcsep/backward.hpp"
#include "dcsep/bss_eval.hpp"
#include "dcsep/cluster.hpp"
#include "dcsep/config.hpp"
#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"
#include "dcsep/fft.hpp"
#include "dcsep/harness.hpp"
#include "dcsep/kmeans.hpp"
#include "dcsep/loss.hpp"
#include "dcsep/lstm.hpp"
#include "dcsep/model_io.hpp"
#include "dcsep/network.hpp"
#include "dcsep/pipeline.hpp"
#include "dcsep/recipes.hpp"
#include "dcsep/report.hpp"
#include "dcsep/rng.hpp"
#include "dcsep/trainer.hpp"
#include "dcsep/wav.hpp"
