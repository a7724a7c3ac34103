#pragma once

#include "pbdetect/error.hpp"
#include "pbdetect/strictmode.hpp"
#include "pbdetect/signal_model.hpp"
#include "pbdetect/memstore.hpp"
#include "pbdetect/preprocess.hpp"
#include "pbdetect/isolator.hpp"
#include "pbdetect/features.hpp"
#include "pbdetect/trainer.hpp"
#include "pbdetect/classifier.hpp"
#include "pbdetect/simulator.hpp"
#include "pbdetect/harness.hpp"
