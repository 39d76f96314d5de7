#pragma once

// Umbrella header.

#include "segface/audio/context.hpp"
#include "segface/audio/mel.hpp"
#include "segface/audio/wav.hpp"
#include "segface/core/graph.hpp"
#include "segface/core/nn.hpp"
#include "segface/core/serialize.hpp"
#include "segface/core/tensor.hpp"
#include "segface/harness/config.hpp"
#include "segface/harness/corpus.hpp"
#include "segface/harness/edit.hpp"
#include "segface/harness/pipeline.hpp"
#include "segface/harness/synth.hpp"
#include "segface/mask/mask.hpp"
#include "segface/mask/mask_io.hpp"
#include "segface/mask/palette.hpp"
#include "segface/metrics/frechet.hpp"
#include "segface/metrics/image.hpp"
#include "segface/metrics/landmarks.hpp"
#include "segface/metrics/sync_score.hpp"
#include "segface/sgi/encoder.hpp"
#include "segface/sgi/generator.hpp"
#include "segface/sgi/providers.hpp"
#include "segface/sgi/styles.hpp"
#include "segface/sgi/train.hpp"
#include "segface/sync/expert.hpp"
#include "segface/sync/train.hpp"
#include "segface/tsg/train.hpp"
#include "segface/tsg/unet.hpp"
