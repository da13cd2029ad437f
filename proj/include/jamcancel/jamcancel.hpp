#pragma once

// Everything in one include.

#include "jamcancel/canceller.hpp"
#include "jamcancel/channel.hpp"
#include "jamcancel/config.hpp"
#include "jamcancel/dataset.hpp"
#include "jamcancel/errors.hpp"
#include "jamcancel/gradcheck.hpp"
#include "jamcancel/harness.hpp"
#include "jamcancel/iq_core.hpp"
#include "jamcancel/iq_file.hpp"
#include "jamcancel/modem.hpp"
#include "jamcancel/phase_net.hpp"
#include "jamcancel/svg.hpp"
#include "jamcancel/trainer.hpp"
