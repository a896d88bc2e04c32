char *s = "a\"b"; /* c */ x->y <<= 0x1F; // end
