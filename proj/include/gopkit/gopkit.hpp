#pragma once

#include "gopkit/align.hpp"
#include "gopkit/error.hpp"
#include "gopkit/evalkit.hpp"
#include "gopkit/gop.hpp"
#include "gopkit/matrix.hpp"
#include "gopkit/pipeline.hpp"
#include "gopkit/report.hpp"
#include "gopkit/simerr.hpp"
#include "gopkit/synthetic.hpp"
#include "gopkit/tensorio.hpp"
