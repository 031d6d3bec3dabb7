#pragma once

#include "unitgraph/error.hpp"
#include "unitgraph/capture.hpp"
#include "unitgraph/tokenizer.hpp"
#include "unitgraph/graph.hpp"
#include "unitgraph/tensor.hpp"
#include "unitgraph/parameters.hpp"
#include "unitgraph/runtime.hpp"
#include "unitgraph/encoders.hpp"
#include "unitgraph/objectives.hpp"
#include "unitgraph/trainer.hpp"
#include "unitgraph/synth.hpp"
