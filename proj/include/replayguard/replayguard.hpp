#pragma once

#include "replayguard/data_pipeline.hpp"
#include "replayguard/error.hpp"
#include "replayguard/explainer.hpp"
#include "replayguard/forecaster.hpp"
#include "replayguard/hash.hpp"
#include "replayguard/pipeline.hpp"
#include "replayguard/random.hpp"
#include "replayguard/reactor_sim.hpp"
#include "replayguard/residual_detector.hpp"
#include "replayguard/rule_classifier.hpp"
#include "replayguard/signal_frame.hpp"
#include "replayguard/svg.hpp"
