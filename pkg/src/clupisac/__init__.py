"""CLuP dual-deconvolution for joint radar and OFDM communications receivers."""
